"""Joint induction of recursive logic programs and perception training.

The engine abduces pseudo-labels for raw inputs under candidate logic
programs, scores program-and-label pairs by a simplicity prior times the
perception model's probability, and alternates abduction with gradient
training of the model.
"""

__version__ = "0.1.0"
