import logging
import os
import tempfile
import yaml
from dynaconf import Dynaconf
from importlib import resources
from pathlib import Path
from pydantic import BaseModel
from typing import List, Optional, Tuple

from .errors import ConfigParseError

__version__ = "0.0.0"

try:
    from importlib.metadata import version

    __version__ = version(__name__.split(".", 1)[0])
except Exception as e:
    logging.getLogger(__name__).debug(f"Failed to load package version: {e}")

logger = logging.getLogger(__name__)

NAMESPACE = "kgcouple"
CONFIG_FILE = "config.yaml"
THREADS_ENV_VAR = "KGCOUPLE_THREADS"
SKIP_FILES_ENV_VAR = "KGCOUPLE_SKIP_CONFIG_FILE_LOAD"
SKIP_BUNDLED_ENV_VAR = "KGCOUPLE_SKIP_BUNDLED_CONFIG_LOAD"


class ConfigSource(BaseModel):
    """One settings file handed to Dynaconf, in increasing precedence order."""

    label: str
    path: Path
    temporary: bool = False


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "false").strip().lower() == "true"


def check_namespace_value(namespace: str) -> None:
    """Raise ValueError unless namespace is a non-empty Python identifier."""
    if not namespace:
        raise ValueError("Invalid namespace '': must be non-empty")
    if not namespace.isidentifier():
        raise ValueError(f"Invalid namespace '{namespace}': must be a valid Python identifier")


def is_resource(namespace: str, resource_name: str) -> bool:
    """True when the package `namespace` ships a file called resource_name."""
    try:
        return (resources.files(namespace) / resource_name).is_file()
    except (TypeError, FileNotFoundError, AttributeError, ModuleNotFoundError):
        return False


def check_config_format(content: str, config_name: str) -> None:
    """Validate that the given content is valid YAML.

    Args:
        content (str): The YAML content to validate.
        config_name (str): The name or path of the config file for error reporting.

    Raises:
        ConfigParseError: If the content is not valid YAML. The message carries the 1-based line and column
            of the problem when YAML reports one.
    """
    try:
        yaml.safe_load(content)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        where = f" at line {line}, column {column}" if line is not None else ""
        logger.error(f"Invalid YAML in {config_name}{where}: {e}", exc_info=True)
        raise ConfigParseError(f"Invalid YAML in {config_name}{where}: {e}", line=line, column=column)


def home_and_local_config_path(namespace: str = NAMESPACE) -> Tuple[Path, Path]:
    """(~/.{namespace}/config.yaml, ./.{namespace}/config.yaml)."""
    check_namespace_value(namespace)
    return Path.home() / f".{namespace}" / CONFIG_FILE, Path(f".{namespace}") / CONFIG_FILE


def get_bundled_config(namespace: str = NAMESPACE) -> str:
    """Return the text of the config.yaml packaged with `namespace`.

    Raises:
        ValueError: If the package has no bundled config or it does not parse.
    """
    if not is_resource(namespace, CONFIG_FILE):
        logger.error(f"No bundled config found for {namespace}")
        raise ValueError(f"No bundled config found for {namespace}")
    try:
        content = resources.files(namespace).joinpath(CONFIG_FILE).read_text(encoding="utf-8")
        check_config_format(content, f"bundled config for '{namespace}'")
    except Exception as e:
        logger.error(f"Failed to load bundled config for {namespace}: {e}", exc_info=True)
        raise ValueError(f"Failed to load bundled config for {namespace}: {e}")
    return content


def _checked_source(label: str, path: Path, quiet: bool) -> ConfigSource:
    check_config_format(path.read_text(encoding="utf-8"), f"{label} '{path}'")
    resolved = path.resolve()
    logger.info(f"Using {label}: {resolved}")
    if not quiet:
        print(f"Using {label}: {resolved}")
    return ConfigSource(label=label, path=resolved)


def _bundled_source(namespace: str, quiet: bool) -> Optional[ConfigSource]:
    try:
        content = get_bundled_config(namespace)
    except ValueError as e:
        logger.warning(f"No bundled config available for {namespace}: {e}")
        return None
    with tempfile.NamedTemporaryFile(mode="w", suffix=f"_{namespace}_bundled_{CONFIG_FILE}", delete=False) as temp:
        temp.write(content)
    logger.info("Will use default (bundled) config")
    if not quiet:
        print("Will use default (bundled) config")
    return ConfigSource(label="bundled config", path=Path(temp.name).resolve(), temporary=True)


def config_sources(
    namespace: str = NAMESPACE, config_path: Optional[str] = None, quiet: bool = False
) -> List[ConfigSource]:
    """Settings files for one load, lowest precedence first.

    A custom path replaces every other source. Otherwise the home file and then the local file are layered,
    and the bundled config is used only when neither exists.

    Raises:
        ValueError: If config_path is given but is not a file.
        ConfigParseError: If a discovered file is not valid YAML.
    """
    check_namespace_value(namespace)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            logger.error(f"Custom config path '{path.resolve()}' does not exist")
            raise ValueError(f"Custom config path '{path.resolve()}' does not exist")
        return [_checked_source("custom config", path, quiet)]

    sources = []
    if not _env_flag(SKIP_FILES_ENV_VAR):
        home, local = home_and_local_config_path(namespace)
        for label, path in (("home config", home), ("local config", local)):
            if path.is_file():
                sources.append(_checked_source(label, path, quiet))
            else:
                logger.debug(f"No {label} at {path.resolve()}")
    if not sources and not _env_flag(SKIP_BUNDLED_ENV_VAR):
        bundled = _bundled_source(namespace, quiet)
        if bundled is not None:
            sources.append(bundled)
    return sources


def load_config(namespace: str = NAMESPACE, config_path: Optional[str] = None, quiet: bool = False) -> Dynaconf:
    """Load layered settings: custom > local > home > bundled.

    Args:
        namespace (str): Package whose config is loaded (e.g., 'kgcouple').
        config_path (Optional[str]): Path to a custom configuration file. If provided, only this file is used.
        quiet (bool): If True, suppresses console output. Defaults to False.

    Returns:
        Dynaconf: Settings with every source already read.

    Raises:
        ValueError: If the config path doesn't exist.
        ConfigParseError: If a config file contains invalid YAML.

    Environment Variables:
        KGCOUPLE_SKIP_CONFIG_FILE_LOAD: "true" skips the home and local files.
        KGCOUPLE_SKIP_BUNDLED_CONFIG_LOAD: "true" skips the packaged config.yaml.
    """
    sources = config_sources(namespace, config_path, quiet)
    if not sources:
        logger.debug(f"No config files found for {namespace}, using empty settings")
    try:
        settings = Dynaconf(
            settings_files=[str(s.path) for s in sources],
            merge_enabled=True,
            load_dotenv=False,
            default_settings_paths=[],
        )
        settings.to_dict()  # Dynaconf is lazy; read before temporary sources go away
        logger.debug(f"Loaded config for {namespace} from {[s.label for s in sources]}")
    finally:
        for source in sources:
            if source.temporary:
                try:
                    source.path.unlink(missing_ok=True)
                except OSError as e:
                    logger.warning(f"Failed to remove temporary config {source.path}: {e}")
    return settings


def init_config(
    namespace: str = NAMESPACE, config_path: Optional[str] = None, force: bool = False, quiet: bool = False
) -> None:
    """Write the bundled config to config_path (default ./.{namespace}/config.yaml).

    Raises:
        SystemExit: If the file exists and force is False, or the bundled config cannot be read or written.
    """
    target = Path(config_path) if config_path else home_and_local_config_path(namespace)[1]
    if target.exists() and not force:
        msg = f"Config file '{target}' already exists. Use force=True to overwrite"
        logger.error(msg)
        if not quiet:
            print(msg)
        raise SystemExit(msg)

    try:
        content = get_bundled_config(namespace)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
    except (ValueError, OSError) as e:
        logger.error(f"Failed to initialize config at '{target}': {e}", exc_info=True)
        raise SystemExit(f"Error: Failed to initialize config at '{target}': {e}")
    logger.info(f"Created '{target}' with default configuration.")
    if not quiet:
        print(f"Created '{target}' with default configuration.")


def thread_count() -> int:
    """Number of worker threads for transforms and ensembles.

    Reads KGCOUPLE_THREADS; falls back to the machine's CPU count. Invalid values are logged and ignored.
    """
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
            if value > 0:
                return value
        except ValueError:
            pass
        logger.warning(f"Ignoring invalid {THREADS_ENV_VAR}={raw!r}; expected a positive integer")
    return os.cpu_count() or 1
