"""Test suite for the nowcasting pipeline."""
