from django.core.management.base import BaseCommand, CommandError

from apps.control.constants import EXIT_OK, EXIT_SOLVER_ERROR, EXIT_VERDICT_FAILED, TASK_CHOICES
from apps.control.exceptions import ConfigError
from apps.control.tasks import parse_config, run


class Command(BaseCommand):
    help = 'Run an optimal control task: ocp <task> --config path [--out dir] [--seed n]'

    def add_arguments(self, parser):
        parser.add_argument('task', choices=[task for task, _ in TASK_CHOICES])
        parser.add_argument('--config', required=True, help='JSON run configuration')
        parser.add_argument('--out', default=None, help='Output directory (default from config or settings)')
        parser.add_argument('--seed', type=int, default=None, help='Seed for randomized probes (overrides config)')

    def handle(self, *args, **options):
        try:
            config = parse_config(options['config'], task=options['task'])
            result = run(config, out_dir=options['out'], seed=options['seed'])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_SOLVER_ERROR)

        if result.exit_code == EXIT_OK:
            self.stdout.write(self.style.SUCCESS(f"{config.task}: all verdicts passed ({result.out_dir})"))
            return
        if result.exit_code == EXIT_VERDICT_FAILED:
            failed = sorted(name for name, ok in result.report.get('verdicts', {}).items() if not ok)
            raise CommandError(
                f"{config.task}: verdicts failed: {', '.join(failed) or 'none recorded'} ({result.out_dir})",
                returncode=EXIT_VERDICT_FAILED,
            )
        raise CommandError(
            f"{config.task}: {result.report['error']['message']} ({result.out_dir})",
            returncode=EXIT_SOLVER_ERROR,
        )
