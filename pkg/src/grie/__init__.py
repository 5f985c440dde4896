"""Key information extraction from visually rich documents.

Character-level text, image crops, and 2-d layout are fused into segment
embeddings, a learned graph revision propagates context between segments,
and a linear-chain CRF tags characters with BIO labels. Everything runs on
a small numpy-backed autograd engine; synthetic page generators provide
reproducible training data.
"""

__version__ = "0.1.0"
