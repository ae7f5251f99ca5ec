from showcaseflow.cli.commands import distill, evaluate, fixture, generate, select, select_train, train

# Registration order is the order shown in --help
COMMAND_MODULES = [fixture, distill, select_train, select, train, generate, evaluate]
