import java.util.ArrayList;
import java.util.List;
import java.util.Scanner;

public class Hero extends Character {
    private static final int VICTORY_ACTION = 100;
    private Location location;
    private List<Crime> crimes = new ArrayList<>();
    private List<Character> roster = new ArrayList<>();

    public Hero(String name, Map map) {
        super(name, 100, 10);
        this.location = map.getStart();
        generateCrimes(map);
        generateRoster();
    }

    private void generateCrimes(Map map) {
        for (Location place : map.getLocations()) {
            crimes.add(new Crime("Robbery at " + place.getName(), place, 10));
        }
    }

    private void generateRoster() {
        roster.add(new Hero("Captain Justice"));
        roster.add(new Villain("Doctor Chaos"));
    }

    private Hero(String name) {
        super(name, 100, 10);
    }

    public String describe() {
        return "Hero " + name + " health " + health + " strength " + strength + " action " + action;
    }

    public void showDetails() {
        System.out.println(describe());
        System.out.println("Location: " + (location == null ? "unknown" : location.getName()));
    }

    public void moveTo(Location next) {
        location = next;
    }

    public void resolveCrime(Crime crime) {
        if (crime.getLocation() == location && !crime.isSolved()) {
            crime.solve();
            addAction(crime.getReward());
        }
    }

    public boolean checkVictory() {
        return action >= VICTORY_ACTION;
    }

    public void adjustAction(Scanner in) {
        System.out.print("New action value: ");
        action = in.nextInt();
    }

    public List<Crime> getCrimes() {
        return crimes;
    }

    public List<Character> getRoster() {
        return roster;
    }
}
