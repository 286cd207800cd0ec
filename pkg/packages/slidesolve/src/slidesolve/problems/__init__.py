""" Problem files shipped with the package. """
import os

_HERE = os.path.dirname(os.path.abspath(__file__))


def example_path(name: str) -> str:
    """ Path of a shipped problem file, e.g. `example_path("example1")`. """
    path = os.path.join(_HERE, name if name.endswith(".json") else f"{name}.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no shipped problem named `{name}`")
    return path
