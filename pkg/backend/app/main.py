"""
FastAPI app: tradução com o modelo treinado e BLEU sob demanda.
"""
import sys

from app.core.log import get_logger

log = get_logger("MAIN")

app = None
import_error = None

try:
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from app.api import bleu, health, translate

    app = FastAPI(title="NMT Self-Training API")

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    app.include_router(health.router, tags=["health"])
    app.include_router(translate.router, prefix="/api", tags=["translate"])
    app.include_router(bleu.router, prefix="/api", tags=["bleu"])
    log.info("✅ Routers registrados com sucesso")

except Exception as e:
    import_error = f"Import error: {type(e).__name__}: {e}"
    log.error(f"❌ Erro ao importar módulos: {import_error}")
    import traceback
    traceback.print_exc(file=sys.stderr)
    # App mínimo para devolver o erro
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="NMT Self-Training API - Error Mode")

    @app.get("/")
    @app.get("/{path:path}")
    async def error_handler(request: Request, path: str = ""):
        return JSONResponse(
            status_code=500,
            content={
                "error": import_error,
                "type": "InitializationError",
                "path": str(request.url.path),
            },
        )
