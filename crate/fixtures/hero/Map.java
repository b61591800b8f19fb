import java.util.ArrayList;
import java.util.List;

public class Map {
    private final List<Location> locations = new ArrayList<>();

    public Map() {
        Location tower = new Location("Tower");
        Location docks = new Location("Docks");
        Location bank = new Location("Bank");
        Location park = new Location("Park");
        tower.connect(docks);
        docks.connect(bank);
        bank.connect(park);
        locations.add(tower);
        locations.add(docks);
        locations.add(bank);
        locations.add(park);
    }

    public Location getStart() {
        return locations.get(0);
    }

    public List<Location> getLocations() {
        return locations;
    }

    public Location find(String name) {
        for (Location l : locations) {
            if (l.getName().equalsIgnoreCase(name)) {
                return l;
            }
        }
        return null;
    }
}
