"""E2E test package."""
