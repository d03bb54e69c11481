"""Demo and benchmark scripts for threatlang."""
