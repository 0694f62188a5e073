"""REST API over the recognizer's scoring and decoding utilities."""
