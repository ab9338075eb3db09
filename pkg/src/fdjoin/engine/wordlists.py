"""Bundled name pools for the synthetic movie corpus."""

FIRST_NAMES = """
Aaron Abigail Adrian Aisha Alan Alice Amara Amelia Andre Angela Arjun Astrid Beatrice Benedict
Bianca Boris Bruno Camila Carlos Cecile Chen Chiara Clara Colin Dalia Damian Daniela Darius
Delia Dmitri Edgar Elena Elias Elif Emeka Esther Fabian Farah Felix Fiona Gareth Greta Gustavo
Hana Hector Helga Hugo Ines Ingrid Isaac Ivana Jamal Jasper Johan Julia Kaito Karim Keira Kofi
Lars Leila Leon Lidia Lorenzo Lucia Magnus Maia Malik Marco Marta Mateo Mira Nadia Naveen Nina
Oscar Olga Omar Paloma Pavel Petra Quentin Rafael Ravi Rosa Ruth Samir Sanna Selma Soren Tariq
Thea Tomas Ursula Valentin Vera Wanda Yara Yusuf Zora
""".split()

LAST_NAMES = """
Abbott Achebe Albrecht Alvarez Andersen Bakker Barros Becker Bianchi Bjork Blanco Brandt Castillo
Chandra Costa Dahl Delgado Dubois Eriksen Esposito Falk Fischer Fontaine Garcia Gomez Greco Hahn
Haas Horvat Ibsen Ivanova Jensen Kaplan Keller Kowalski Kruger Lang Larsen Lindqvist Lopez Marino
Meyer Moreau Nakamura Novak Okafor Olsen Ortiz Pereira Petrov Quinn Ramos Richter Rossi Sato
Schmidt Silva Sorensen Suzuki Tanaka Torres Varga Vogel Weber Wolff Yilmaz Zimmer
""".split()

TITLE_ADJECTIVES = """
Silent Broken Golden Hidden Last Crimson Distant Frozen Hollow Electric Velvet Burning Forgotten
Midnight Restless Quiet Savage Tender Wandering Endless Paper Iron Glass Northern Sunken Bitter
Lonely Scarlet Wild Fading Secret Shattered Invisible Eternal Gentle Hungry Lucky Perfect Pale Rapid
""".split()

TITLE_NOUNS = """
River Garden Empire Harbor Mirror Horizon Station Kingdom Orchard Tide Lantern Frontier Compass
Voyage Meadow Signal Archive Canyon Echo Island Labyrinth Monsoon Parade Quarry Reef Summit Tunnel
Valley Whisper Winter Fortress Carnival Desert Engine Falcon Glacier Highway Jungle Legacy Nocturne
""".split()

FILLER_SENTENCES = [
    "The weather had been unusually mild for the season",
    "Several neighbours gathered in the courtyard after dinner",
    "A local newspaper ran a short piece about the festival",
    "Tickets for the evening screening sold out within an hour",
    "The old cinema on the corner was recently renovated",
    "Many people prefer watching films with friends on weekends",
    "Critics disagreed sharply about the director's latest work",
    "The soundtrack was released a week before the premiere",
    "Streaming services have changed how audiences discover films",
    "An online forum collected hundreds of reviews overnight",
    "The popcorn machine broke down halfway through the show",
    "Rain kept most visitors indoors for the entire afternoon",
]
