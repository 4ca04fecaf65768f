"""Logical rule enforcement for sequential binary data."""
