"""Data-transfer training for template-free retrosynthesis with a from-scratch SMILES toolkit.

Modules: ``smiles`` (parsing, canonicalization), ``dataset`` (corpora, cleansing, toy
grammar), ``model`` (encoder-decoder Transformer, checkpoints), ``optim`` (Adam,
schedules), ``decode`` (beam search, n-best scoring), ``trainer`` (the five regimes),
``pipeline`` (toy strategy comparison) and ``cli``.
"""

from .smiles import canonicalize, canonical_reactant_set, parse_smiles, strip_atom_maps, tokenize

__version__ = "0.1.0"

__all__ = ["canonicalize", "canonical_reactant_set", "parse_smiles", "strip_atom_maps", "tokenize", "__version__"]
