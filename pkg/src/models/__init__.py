# Pydantic models