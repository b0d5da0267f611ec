"""Referenceless quality estimation for ASR hypotheses.

A Siamese transformer ranker is trained on pairs of outputs of one
recognizer at different compression levels, with the less compressed
output as the better side; its logit then scores single hypotheses without
a reference transcript.
"""

__version__ = "0.1.0"
