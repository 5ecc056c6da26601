import os
from dotenv import load_dotenv
load_dotenv()

class Settings:
    # Único override de ambiente aceito sobre um arquivo de experimento
    OUTPUT_DIR: str | None = os.getenv("NMT_OUTPUT_DIR")
    # Bundle (checkpoint + BPE) servido pela API HTTP
    MODEL_DIR: str | None = os.getenv("NMT_MODEL_DIR")
    LOG_LEVEL: str = os.getenv("NMT_LOG_LEVEL", "INFO").upper()
    PROGRESS: bool = os.getenv("NMT_PROGRESS", "true").lower() == "true"

settings = Settings()
