"""Main entry point for the nowcasting CLI."""

from src.cli.interface import main

if __name__ == "__main__":
    main()
