"""命令列入口：委派至 `src.cli.main`."""

from src import cli

if __name__ == "__main__":
    cli.main()
