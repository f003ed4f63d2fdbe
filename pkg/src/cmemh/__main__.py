"""Allow ``python -m cmemh``."""

from cmemh.cli import main

if __name__ == "__main__":
    main()
