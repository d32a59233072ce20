from src.commands import analyze, synthesize, simulate, sweep

COMMANDS = (analyze, synthesize, simulate, sweep)
