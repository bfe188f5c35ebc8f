"""Channel-delay correlation features and dilated CNN-LSTM severity classifiers."""

__version__ = "0.1.0"
