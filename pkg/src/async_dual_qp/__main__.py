"""Entry point for python -m async_dual_qp."""

from .cli import main

if __name__ == "__main__":
    main()
