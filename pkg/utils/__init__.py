# Utils package initialization