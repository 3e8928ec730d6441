"""
vinecc - grape cluster closure pipeline
Entry point for the command-line tool.
"""

import sys


def main():
    """Application entry point."""
    from vinecc.app import run_application
    return run_application(sys.argv)


if __name__ == "__main__":
    sys.exit(main())
