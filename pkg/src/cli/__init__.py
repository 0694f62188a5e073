"""Command-line harness for the EEG/video speech recognizer."""
