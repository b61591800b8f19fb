import java.util.ArrayList;
import java.util.Comparator;
import java.util.List;

public class Scoreboard {
    private final List<Character> players = new ArrayList<>();

    public void record(Character c) {
        players.add(c);
    }

    public List<Character> top(int n) {
        List<Character> sorted = new ArrayList<>(players);
        sorted.sort(Comparator.comparingInt(Character::getAction).reversed());
        return sorted.subList(0, Math.min(n, sorted.size()));
    }

    public void print() {
        for (Character c : top(5)) {
            System.out.println(c.getName() + " " + c.getAction());
        }
    }
}
