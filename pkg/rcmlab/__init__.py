"""
rcmlab - Random Conductance Model Lab

Numerical experiments on the random conductance model on periodic tori:
heat kernel decay, relaxation of local observables, massive correctors,
resistance weights and the trapping construction where moments fail.
"""

__version__ = "0.1.0"
__author__ = "JaKuba23"

BANNER = r"""
 ██████╗  ██████╗███╗   ███╗██╗      █████╗ ██████╗
 ██╔══██╗██╔════╝████╗ ████║██║     ██╔══██╗██╔══██╗
 ██████╔╝██║     ██╔████╔██║██║     ███████║██████╔╝
 ██╔══██╗██║     ██║╚██╔╝██║██║     ██╔══██║██╔══██╗
 ██║  ██║╚██████╗██║ ╚═╝ ██║███████╗██║  ██║██████╔╝
 ╚═╝  ╚═╝ ╚═════╝╚═╝     ╚═╝╚══════╝╚═╝  ╚═╝╚═════╝
        ~ Random Conductance Lab v{version} ~
"""


def get_banner(colorize: bool = True) -> str:
    """Return the ASCII banner with optional ANSI coloring."""
    from rcmlab.output import Colors

    banner = BANNER.format(version=__version__)

    if colorize:
        colored_lines = []
        for line in banner.split("\n"):
            if "~" in line:
                colored_lines.append(f"{Colors.CYAN}{line}{Colors.RESET}")
            elif "█" in line or "╚" in line:
                colored_lines.append(f"{Colors.MAGENTA}{line}{Colors.RESET}")
            else:
                colored_lines.append(line)
        return "\n".join(colored_lines)

    return banner
