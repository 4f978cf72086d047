"""Test suite for the Statistical JKO Lab."""
