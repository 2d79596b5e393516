from src.cli import cli


def main() -> None:
    # python . <subcommand> [options]; python . --help lists them.
    cli()


if __name__ == "__main__":
    main()
