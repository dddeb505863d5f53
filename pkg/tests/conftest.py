from hypothesis import settings

settings.register_profile("cgnn", database=None, max_examples=30, deadline=None)
settings.load_profile("cgnn")
