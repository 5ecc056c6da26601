# Toolkit de NMT com self-training e back-translation
