"""Caption-quality evaluation engine.

Scores caption generators before decoding (504 tier-composed pre-gen
metrics over reference-token probability traces), validates those scores
with standard post-gen metrics (CIDEr-D, BLEU, Word Mover's Distance), and
measures how well the two families agree via CIDEr-stratified Pearson
correlation studies.
"""

__version__ = "0.1.0"
