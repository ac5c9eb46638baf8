"""writers and readers of dataset and result files."""
