from omnifuse.cli import main

main()
