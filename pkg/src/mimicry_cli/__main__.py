"""Entry point for running mimicry_cli as a module.

Usage: python -m mimicry_cli [OPTIONS] COMMAND [ARGS]...
"""

from mimicry_cli.cli import main

if __name__ == "__main__":
    main()
