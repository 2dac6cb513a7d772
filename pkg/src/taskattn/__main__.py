from taskattn.cli import main

main()
