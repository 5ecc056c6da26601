# Modelos pydantic
