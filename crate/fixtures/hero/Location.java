import java.util.ArrayList;
import java.util.List;

public class Location {
    private final String name;
    private final List<Location> exits = new ArrayList<>();

    public Location(String name) {
        this.name = name;
    }

    public String getName() {
        return name;
    }

    public void connect(Location other) {
        exits.add(other);
        other.exits.add(this);
    }

    public List<Location> getExits() {
        return exits;
    }
}
