"""Minimal numpy network stack: layers, models, training, weights IO."""
