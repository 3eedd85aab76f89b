from heisholder.main import main

main()
