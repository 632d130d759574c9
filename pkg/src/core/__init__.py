"""Core modules for the nowcasting pipeline."""
