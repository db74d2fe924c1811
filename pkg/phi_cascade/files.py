import os
from pathlib import Path

from dotenv import load_dotenv

CACHE_ENV_VAR = "CASCADE_CACHE"


def ensure_parent_dir_exists(path: str | Path) -> Path:
    """
    Ensure that the directory holding `path` exists.

    Args:
        path: A file path.

    Returns:
        The path, as a Path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def resolve_cache_path(cli_value: str | None) -> Path | None:
    """
    The phi-cache location: $CASCADE_CACHE (also read from a .env file) wins over
    the --cache flag. "none" disables persistence.

    Args:
        cli_value: The value given to --cache, if any.

    Returns:
        The cache path, or None when caching to disk is disabled.
    """
    load_dotenv()
    value = os.environ.get(CACHE_ENV_VAR) or cli_value
    if value is None or value.lower() == "none":
        return None
    return Path(os.path.expanduser(value))
