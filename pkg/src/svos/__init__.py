"""Sequence-to-sequence video object segmentation at desk scale.

A self-contained stack: dense tensors with reverse-mode autodiff,
conv/pool/upsample layers, a four-network segmentation model
(initializer, encoder, convolutional LSTM, decoder), synthetic video
data, offline training, first-frame online fine-tuning, and the
standard region/contour evaluation metrics.
"""

__version__ = "0.1.0"
