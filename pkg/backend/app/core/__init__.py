# Núcleo: texto, modelo, treino, pipeline
