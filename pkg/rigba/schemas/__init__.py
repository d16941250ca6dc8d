"""Pydantic schemas for configuration, reports and error payloads."""
