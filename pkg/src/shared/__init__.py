"""Signal processing, models, decoding and experiment pipeline."""
