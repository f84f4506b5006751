"""banktrace: synthetic banking interaction traces and sequence models.

Pipeline: simulate typed customers into event trajectories, featurize them
into state-action pairs, build a thresholded state-transition graph, and
train/evaluate two from-scratch models (an LSTM over bag-of-words/one-hot
encodings, and the same LSTM augmented with a graph-network state
embedding) on goal, customer-type, and trajectory prediction.
"""

__version__ = "0.1.0"
