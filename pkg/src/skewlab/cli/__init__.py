"""Configuration ingestion, the coefficient expression language, and the
command-line front end."""
