from pydantic import BaseModel


class ErrorSchema(BaseModel):
    error_code: str
    message: str
