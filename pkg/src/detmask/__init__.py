"""detmask: KB-aligned deterministic masking for MLM pre-training, at desk scale.

The pipeline turns a triplet knowledge base plus a paragraph corpus into
masked-language-model training samples whose masked object is uniquely
recoverable from the remaining clues, trains a small from-scratch model with
the auxiliary clue objectives, and probes the result with multi-prompt cloze
questions.
"""

__version__ = "0.1.0"
