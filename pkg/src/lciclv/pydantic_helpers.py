from typing import Any, Type, get_args, get_origin

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel, ValidationError
    from pydantic.fields import ModelField
else:
    from pydantic.v1 import BaseModel, ValidationError
    from pydantic.v1.fields import ModelField

from .exceptions import ConfigError


def _compress(key:str)->str:
    return str(key).lower().replace(" ","").replace("_","").replace("-","")


def _nested_model(field_info: ModelField):
    """Returns the pydantic model a field holds (directly, in a list or as dict values), if any."""
    candidates = [field_info.type_, field_info.outer_type_]
    for candidate in candidates:
        if isinstance(candidate, type) and issubclass(candidate, BaseModel):
            return candidate
        for arg in get_args(candidate) or ():
            if isinstance(arg, type) and issubclass(arg, BaseModel):
                return arg
    return None


def align_fields_with_model(data:dict, model:Type[BaseModel]) -> dict:
    """ Renames the keys of a config mapping onto the field names of `model`

    Accepts the field name, its alias, and any casing / spacing variant
    (i.e. "Random Coefficients", "randomCoefficients", "random-coefficients" for random_coefficients).
    Unknown keys are kept as they are, so the model itself reports them.
    """
    if not isinstance(data, dict):
        return data
    res = {}
    data_with_compressed_keys = {_compress(k): k for k in data.keys()}
    used = set()
    for field, field_info in model.__fields__.items():
        source_key = None
        if field in data:
            source_key = field
        elif field_info.alias and field_info.alias in data:
            source_key = field_info.alias
        else:
            source_key = data_with_compressed_keys.get(_compress(field))
        if source_key is None:
            continue
        used.add(source_key)
        value = data[source_key]
        nested = _nested_model(field_info)
        if nested is not None:
            if isinstance(value, dict) and get_origin(field_info.outer_type_) is dict:
                value = {k: align_fields_with_model(v, nested) for k, v in value.items()}
            elif isinstance(value, dict):
                value = align_fields_with_model(value, nested)
            elif isinstance(value, list):
                value = [align_fields_with_model(item, nested) if isinstance(item, dict) else item for item in value]
        res[field] = value
    for k, v in data.items():
        if k not in used:
            res[k] = v
    return res


def _field_path(loc)->str:
    """("indicators", 0, "categories") -> "indicators[0].categories"."""
    path = ""
    for part in loc or ():
        if isinstance(part, int):
            path += f"[{part}]"
        elif part != "__root__":
            path += f".{part}" if path else str(part)
    return path or "(top level)"


def humanize_pydantic_validation_error(validation_error:ValidationError)->str:
    """One `field.path: message` line per error, in the order pydantic reports them."""
    return "\n".join(f"  {_field_path(err.get('loc'))}: {err.get('msg')}" for err in validation_error.errors())


def parse_config(data:Any, model:Type[BaseModel], source:str="configuration"):
    """Validates a raw config mapping into `model`, raising ConfigError with a readable listing."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must be a mapping, got {type(data).__name__}")
    try:
        return model.parse_obj(align_fields_with_model(data, model))
    except ValidationError as e:
        raise ConfigError(f"Invalid {source}:\n{humanize_pydantic_validation_error(e)}") from e
