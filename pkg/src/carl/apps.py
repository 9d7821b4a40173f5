from django.apps import AppConfig


class CarlConfig(AppConfig):
    name = "carl"
    verbose_name = "Constraints as rewards"

    def ready(self):
        # registers the built-in predicates and value functions
        import carl.envs  # noqa: F401
