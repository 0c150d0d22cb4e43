import importlib
import importlib.metadata
import inspect
import json
import warnings
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

from packaging.version import InvalidVersion, Version
from pydantic import BaseModel, ValidationError

from .errors import InputError

LIB_NAME = "graph-reward-kit"
PACKAGE_PREFIX = "grk."


class ArtifactSerde:
    """
    Self-describing JSON for configuration artifacts (dataset specs, reward configs,
    mock policies, policy sweeps). Models, enums, tuples, decimals and non-string dict
    keys are tagged so that loading restores the exact classes, and every envelope
    records the library version that wrote it.
    """

    VERSION_KEY = "__version__"
    LIB_KEY = "__lib__"
    CLASS_KEY = "__class__"
    ENUM_KEY = "__enum__"
    DICT_KEY = "__dict__"
    KEY_TAG = "__key__"
    TUPLE_KEY = "__tuple__"
    DECIMAL_KEY = "__decimal__"

    # ---------------------
    # Public API
    # ---------------------

    @classmethod
    def dump(
        cls,
        obj: BaseModel,
        *,
        lib: Optional[str] = LIB_NAME,
        version: Optional[str] = None,
    ) -> dict:
        """Serialize a model to a JSON-safe dict, embedding library and version info."""
        if not isinstance(obj, BaseModel):
            raise InputError(f"only pydantic models can be dumped, got {type(obj).__name__}")
        if version is None and lib == LIB_NAME:
            from . import __version__

            version = __version__
        data = cls._to_json(obj)
        if lib:
            data[cls.LIB_KEY] = lib
        if version:
            data[cls.VERSION_KEY] = version
        return data

    @classmethod
    def load(cls, data: dict, expected: Optional[type[BaseModel]] = None) -> Any:
        """
        Restore a dumped artifact and check version compatibility. With ``expected``,
        plain untagged JSON is validated directly against that model, and a tagged
        artifact of another class is rejected.
        """
        if not isinstance(data, dict):
            raise InputError(f"artifact must be a JSON object, got {type(data).__name__}")
        data = dict(data)

        lib_name = data.pop(cls.LIB_KEY, None)
        version_str = data.pop(cls.VERSION_KEY, None)
        try:
            if cls.CLASS_KEY not in data and expected is not None:
                obj = expected.model_validate(data)
            else:
                obj = cls._from_json(data)
        except ValidationError as exc:
            raise InputError(f"invalid artifact: {exc}") from exc

        if expected is not None and not isinstance(obj, expected):
            raise InputError(f"expected a {expected.__name__} artifact, got {type(obj).__name__}")
        if lib_name and version_str:
            cls._check_version_compatibility(lib_name, version_str)
        return obj

    @classmethod
    def dump_file(cls, obj: BaseModel, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            json.dump(cls.dump(obj), fp, indent=2, sort_keys=True)
            fp.write("\n")

    @classmethod
    def load_file(cls, path: Union[str, Path], expected: Optional[type[BaseModel]] = None) -> Any:
        try:
            with open(path, encoding="utf-8") as fp:
                data = json.load(fp)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON: {exc}") from exc
        return cls.load(data, expected)

    # ---------------------
    # Version Checking
    # ---------------------

    @staticmethod
    def _check_version_compatibility(lib_name: str, serialized_version: str) -> None:
        """Compare serialized vs installed version and emit semantic warnings."""
        try:
            installed_version = importlib.metadata.version(lib_name)
        except importlib.metadata.PackageNotFoundError:
            warnings.warn(f"Library '{lib_name}' not found; cannot verify artifact compatibility.")
            return

        try:
            v_serialized = Version(serialized_version)
            v_installed = Version(installed_version)
        except InvalidVersion:
            if serialized_version != installed_version:
                warnings.warn(
                    f"Version mismatch for {lib_name}: serialized={serialized_version}, "
                    f"installed={installed_version}"
                )
            return

        if v_serialized.major != v_installed.major:
            warnings.warn(
                f"Major version mismatch for {lib_name}: "
                f"serialized={serialized_version}, installed={installed_version} "
                f"(artifact may be incompatible)"
            )
        elif v_serialized.minor != v_installed.minor:
            warnings.warn(
                f"Minor version difference for {lib_name}: "
                f"serialized={serialized_version}, installed={installed_version} "
                f"(review artifact compatibility)"
            )

    # ---------------------
    # Internal: Serializer
    # ---------------------

    @classmethod
    def _to_json(cls, obj: Any) -> Any:
        if isinstance(obj, BaseModel):
            data = {k: cls._to_json(v) for k, v in obj.__dict__.items() if not k.startswith("_")}
            data[cls.CLASS_KEY] = f"{obj.__class__.__module__}.{obj.__class__.__name__}"
            return data

        if isinstance(obj, Enum):
            return {cls.ENUM_KEY: f"{obj.__class__.__module__}.{obj.__class__.__name__}.{obj.name}"}

        if isinstance(obj, Decimal):
            return {cls.DECIMAL_KEY: str(obj)}

        if isinstance(obj, dict):
            return {
                cls.DICT_KEY: [{cls.KEY_TAG: cls._to_json(k), "value": cls._to_json(v)} for k, v in obj.items()]
            }

        if isinstance(obj, list):
            return [cls._to_json(v) for v in obj]
        if isinstance(obj, tuple):
            return {cls.TUPLE_KEY: [cls._to_json(v) for v in obj]}

        if obj is None or isinstance(obj, (str, int, float, bool)):
            return obj

        raise InputError(f"cannot serialize value of type {type(obj).__name__}")

    # ---------------------
    # Internal: Deserializer
    # ---------------------

    @classmethod
    def _from_json(cls, obj: Any) -> Any:
        if isinstance(obj, dict):
            if cls.ENUM_KEY in obj:
                module, enum_name, member = obj[cls.ENUM_KEY].rsplit(".", 2)
                enum_cls = cls._import_from_path(f"{module}.{enum_name}")
                if not (inspect.isclass(enum_cls) and issubclass(enum_cls, Enum)):
                    raise InputError(f"{module}.{enum_name} is not an enum")
                return enum_cls[member]

            if cls.DECIMAL_KEY in obj:
                return Decimal(obj[cls.DECIMAL_KEY])

            if cls.TUPLE_KEY in obj:
                return tuple(cls._from_json(v) for v in obj[cls.TUPLE_KEY])

            if cls.CLASS_KEY in obj:
                obj = dict(obj)
                class_path = obj.pop(cls.CLASS_KEY)
                model_cls = cls._import_from_path(class_path)
                if not (inspect.isclass(model_cls) and issubclass(model_cls, BaseModel)):
                    raise InputError(f"{class_path} is not a model class")
                return model_cls.model_validate({k: cls._from_json(v) for k, v in obj.items()})

            if cls.DICT_KEY in obj:
                restored = {}
                for item in obj[cls.DICT_KEY]:
                    key = cls._from_json(item[cls.KEY_TAG])
                    if isinstance(key, list):
                        key = tuple(key)
                    restored[key] = cls._from_json(item["value"])
                return restored

            return {k: cls._from_json(v) for k, v in obj.items()}

        if isinstance(obj, list):
            return [cls._from_json(v) for v in obj]

        return obj

    # ---------------------
    # Helper
    # ---------------------

    @staticmethod
    def _import_from_path(path: str) -> Any:
        if not path.startswith(PACKAGE_PREFIX):
            raise InputError(f"refusing to import {path!r}: artifacts may only reference {PACKAGE_PREFIX}* classes")
        module_name, attr_name = path.rsplit(".", 1)
        try:
            module = importlib.import_module(module_name)
            return getattr(module, attr_name)
        except (ImportError, AttributeError) as exc:
            raise InputError(f"unknown artifact class {path!r}") from exc
