"""chestsim: link-level OFDM simulation and channel-estimation benchmarks.

Modules
-------
channel     WSSUS tapped-delay-line fading synthesis and autocorrelation.
ofdm        Resource grid, 802.11p piloting, Gray mapping, equalization.
estimators  LS interpolation, 2D and 2x1D Wiener filters, mediated models.
nn          Recurrent grid estimator (bidirectional LSTM + dense head).
coding      LDPC encoding, APP soft demapping, belief-propagation decoding.
bench       Experiment configs, sweep runners, result emission, CLI.
"""

__version__ = "0.1.0"
