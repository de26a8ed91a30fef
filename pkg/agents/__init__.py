"""modhealth stage scripts and their shared settings."""
