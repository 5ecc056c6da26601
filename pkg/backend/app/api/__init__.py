# Routers HTTP (tradução, BLEU, health)
