"""EEG, audio and video continuous speech recognition."""
