import argparse

from . import exp, gen, policies, provider


def create_parser():
    parser = argparse.ArgumentParser(
        description="likelyseq: highly likely state sequences of finite Markov chains"
    )
    main_subparsers = parser.add_subparsers(
        title="modules",
        description="the subcommands of likelyseq",
        help="module-level help",
        dest="module",
        required=True,
    )

    gen.add_module_subparsers(main_subparsers)
    policies.add_module_subparsers(main_subparsers)
    exp.add_module_subparsers(main_subparsers)
    provider.add_module_subparsers(main_subparsers)
    return parser


def main():
    parser = create_parser()
    args = parser.parse_args()
    if hasattr(args, "func"):
        args.func(args)
    else:
        parser.print_help()


if __name__ == "__main__":
    main()
