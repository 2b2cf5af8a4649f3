"""Value types and typed recipes shared by the services."""
