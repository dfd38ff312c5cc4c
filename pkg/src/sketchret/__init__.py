"""sketchret: semi-supervised sketch-to-photo retrieval at desk scale.

Jointly trains a sequential photo-to-sketch generator and a cross-modal
embedding retrieval model: the generator supplies pseudo sketches for
unlabelled photos, and the retrieval model plus a pair discriminator
supply policy-gradient rewards back to the generator.
"""

__version__ = "0.1.0"
